//! Library side of the `vlf` binary: the review HTTP service, exposed so it
//! can be exercised without a socket.

pub mod server;
