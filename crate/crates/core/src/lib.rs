pub mod cid;
pub mod codec;
pub mod costmodel;
pub mod experiments;
pub mod increment;
pub mod ledger;
pub mod node;
pub mod recovery;
pub mod simnet;
pub mod store;
