#![allow(dead_code)]

pub mod gradcheck_cases;
