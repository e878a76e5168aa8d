pub mod attack;
pub mod ckks;
pub mod data;
pub mod federation;
pub mod nn;
pub mod par;
pub mod quant;
pub mod shaping;
