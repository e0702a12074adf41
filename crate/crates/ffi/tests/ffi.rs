use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use clara_ffi::*;

fn last_error() -> String {
    let p = clara_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn new_env(seed: u64) -> *mut ClaraEnv {
    let mut env = ptr::null_mut();
    assert_eq!(
        unsafe { clara_env_new(ptr::null(), seed, &mut env) },
        ClaraStatus::Ok
    );
    env
}

#[test]
fn env_round_trip_matches_library() {
    let env = new_env(7);
    let mut counts = [0u32; 3];
    unsafe {
        assert_eq!(
            clara_env_reset(env, 11, counts.as_mut_ptr()),
            ClaraStatus::Ok
        );
    }
    let mut world = clara::env::SliceWorld::new(Default::default(), 7).unwrap();
    let obs = world.reset(11).unwrap();
    assert_eq!(counts, obs.counts);

    let mut budget = 0.0;
    unsafe { clara_env_total_bandwidth(env, &mut budget) };
    let a = [budget / 3.0; 3];
    for _ in 0..5 {
        let mut r = ClaraStepResult::default();
        assert_eq!(
            unsafe { clara_env_step(env, a.as_ptr(), &mut r) },
            ClaraStatus::Ok
        );
        let expect = world.step(&clara::env::Action::new(a)).unwrap();
        assert_eq!(r.reward.to_bits(), expect.reward.to_bits());
        assert_eq!(r.latency, expect.inst_costs);
        assert_eq!(r.dissatisfaction, expect.cum_costs);
        assert_eq!(r.next_counts, expect.next_obs.counts);
    }
    unsafe { clara_env_free(env) };
}

#[test]
fn over_budget_action_is_a_contract_error() {
    let env = new_env(1);
    let a = [1e6, 0.0, 0.0];
    let mut r = ClaraStepResult::default();
    assert_eq!(
        unsafe { clara_env_step(env, a.as_ptr(), &mut r) },
        ClaraStatus::Contract
    );
    assert!(last_error().contains("budget"));
    unsafe { clara_env_free(env) };
}

#[test]
fn null_arguments_are_reported() {
    let mut r = ClaraStepResult::default();
    let a = [0.0; 3];
    assert_eq!(
        unsafe { clara_env_step(ptr::null_mut(), a.as_ptr(), &mut r) },
        ClaraStatus::NullPointer
    );
    assert!(last_error().contains("env"));
    assert_eq!(
        unsafe { clara_env_new(ptr::null(), 0, ptr::null_mut()) },
        ClaraStatus::NullPointer
    );
    unsafe {
        clara_env_free(ptr::null_mut());
        clara_allocator_free(ptr::null_mut());
        clara_policy_free(ptr::null_mut());
    }
}

#[test]
fn bad_config_and_names() {
    let cfg = CString::new("[env]\nuser_cap = 0\n").unwrap();
    let mut env = ptr::null_mut();
    assert_eq!(
        unsafe { clara_env_new(cfg.as_ptr(), 0, &mut env) },
        ClaraStatus::Config
    );
    assert!(env.is_null());

    let kind = CString::new("round_robin").unwrap();
    let mut alloc = ptr::null_mut();
    assert_eq!(
        unsafe { clara_allocator_new(kind.as_ptr(), &mut alloc) },
        ClaraStatus::InvalidArgument
    );
    assert!(last_error().contains("round_robin"));

    let path = CString::new("/nonexistent/ckpt.json").unwrap();
    let mut policy = ptr::null_mut();
    assert_eq!(
        unsafe { clara_policy_load(path.as_ptr(), &mut policy) },
        ClaraStatus::Io
    );
}

#[test]
fn allocator_splits_the_budget() {
    let env = new_env(3);
    let kind = CString::new("one_third").unwrap();
    let mut alloc = ptr::null_mut();
    let mut out = [0.0; 3];
    unsafe {
        assert_eq!(
            clara_allocator_new(kind.as_ptr(), &mut alloc),
            ClaraStatus::Ok
        );
        assert_eq!(
            clara_allocator_allocate(alloc, env, out.as_mut_ptr()),
            ClaraStatus::Ok
        );
        clara_allocator_free(alloc);
        clara_env_free(env);
    }
    assert_eq!(out, [102_400.0 / 3.0; 3]);
}

#[test]
fn softmax_matches_direct_formula() {
    let logits = [1.0, 0.0, -1.0];
    let mut out = [0.0; 3];
    assert_eq!(
        unsafe { clara_softmax_project(logits.as_ptr(), 3, 1.0, out.as_mut_ptr()) },
        ClaraStatus::Ok
    );
    let z: f64 = logits.iter().map(|x| x.exp()).sum();
    for (o, l) in out.iter().zip(logits) {
        assert!((o - l.exp() / z).abs() < 1e-15);
    }
    let bad = [f64::NAN, 0.0, 0.0];
    assert_eq!(
        unsafe { clara_softmax_project(bad.as_ptr(), 3, 1.0, out.as_mut_ptr()) },
        ClaraStatus::InvalidArgument
    );
}

#[test]
fn policy_from_checkpoint_acts_like_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = clara::harness::RunConfig::from_toml_str(
        "method = \"ppo\"\niterations = 1\n[eval]\nepisodes = 1\nslots = 5\n[rl]\nepisodes_per_iter = 1\nepisode_slots = 10\nepochs = 1\nminibatch_size = 10\n",
        &[],
    )
    .unwrap();
    clara::harness::run(&cfg, dir.path(), None, &mut |_| {}).unwrap();
    let path = dir.path().join("final.json");
    let ck = clara::harness::Checkpoint::load(&path).unwrap();
    let deployed = clara::harness::DeployedPolicy::from_checkpoint(&ck).unwrap();

    let c_path = CString::new(path.to_str().unwrap()).unwrap();
    let mut policy = ptr::null_mut();
    assert_eq!(
        unsafe { clara_policy_load(c_path.as_ptr(), &mut policy) },
        ClaraStatus::Ok
    );
    let counts = [40u32, 55, 9];
    let mut out = [0.0; 3];
    assert_eq!(
        unsafe { clara_policy_act(policy, counts.as_ptr(), out.as_mut_ptr()) },
        ClaraStatus::Ok
    );
    unsafe { clara_policy_free(policy) };
    assert_eq!(out, deployed.act(&clara::env::Observation { counts }));
}

#[test]
fn version_is_nul_terminated() {
    let v = unsafe { CStr::from_ptr(clara_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c_and_cxx() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("include")
        .join("clara.h");
    assert!(header.exists(), "build script did not write the header");
    let text = std::fs::read_to_string(&header).unwrap();
    for f in [
        "clara_env_new",
        "clara_env_step",
        "clara_policy_act",
        "clara_last_error_message",
    ] {
        assert!(text.contains(f), "{f} missing from header");
    }
    for (compiler, lang) in [("cc", "c"), ("c++", "c++")] {
        let Ok(out) = Command::new(compiler)
            .args(["-fsyntax-only", "-x", lang])
            .arg(&header)
            .output()
        else {
            eprintln!("{compiler} not available; skipping");
            continue;
        };
        assert!(
            out.status.success(),
            "{compiler}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
}
