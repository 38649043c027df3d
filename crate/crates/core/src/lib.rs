pub mod free_target;
pub mod grid;
pub mod optimizer;
pub mod perimeter;
pub mod transport;
pub mod verification;
