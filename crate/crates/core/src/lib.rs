#![cfg_attr(not(test), no_std)]
extern crate alloc;

pub mod dynamics;
pub mod math;
pub mod msgs;
pub mod nmpc;
pub mod sim;
