#![allow(dead_code)]

pub mod cmdp;
pub mod gradients;
pub mod projection;
