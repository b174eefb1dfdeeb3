#![allow(dead_code)]

pub mod instances;
pub mod milp_ref;
pub mod simplex;
