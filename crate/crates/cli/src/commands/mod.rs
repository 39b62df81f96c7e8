pub mod hil;
pub mod lab;
pub mod net;
pub mod plot;
