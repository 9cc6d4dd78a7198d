#![allow(dead_code)]

pub mod capture_log;
pub mod roundtrip;
pub mod stub;
