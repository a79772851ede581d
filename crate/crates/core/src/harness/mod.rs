pub mod acceptance;
pub mod single;
pub mod sweep;
