pub mod block;
pub mod checksum;
pub mod discovery;
pub mod evalmodel;
pub mod hashline;
pub mod identity;
pub mod index;
pub mod node;
pub mod simnet;
pub mod sync;
