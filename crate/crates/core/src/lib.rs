//! Discrete-event simulation of post-quantum key exchange and signature
//! verification over a classical CAN bus.

pub mod bus;
pub mod crypto;
pub mod ecu;
pub mod experiment;
pub mod frame;
pub mod protocol;
pub mod seed;
pub mod time;
pub mod transport;
