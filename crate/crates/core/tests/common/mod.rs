#![allow(dead_code)]

pub mod mip_oracle;
