//! Independent reference implementations shared by the integration suites.
#![allow(dead_code)]

pub mod attention;
pub mod grad;
pub mod propagate;
