//! A bulk-synchronous distributed list — the "distributed free monoid".
//!
//! The model: `P` ranks run the *same* program over a [`Communicator`];
//! a [`DFM`] stores only the list elements local to each rank, while the
//! logical global list is the concatenation of the local lists in rank
//! order (contiguous, ascending — see [`Partition`] for the split).
//! Purely local operations ([`DFM::map`], [`DFM::flat_map`]) never
//! communicate; everything else is a collective that every rank must call
//! in the same order.
//!
//! Two communicators are provided: [`ThreadComm`] simulates the ranks as
//! threads inside one process (the default; see [`run_bsp`]), and
//! [`TcpComm`] runs real processes over stream sockets bootstrapped from
//! a rank-0 rendezvous address.
//!
//! ```
//! use taskmill::dfm::run_bsp;
//!
//! // Sum 0..10 on four simulated ranks; every rank sees the total.
//! let sums = run_bsp(4, |ctx| ctx.iterates(10).reduce(|a, b| a + b, 0));
//! assert_eq!(sums, vec![45, 45, 45, 45]);
//! ```

pub mod comm;
pub mod demo;
pub mod list;
pub mod tcp;

pub use comm::{run_bsp, Communicator, ThreadComm, Wire};
pub use list::{Context, DfmError, Partition, DFM};
pub use tcp::TcpComm;
