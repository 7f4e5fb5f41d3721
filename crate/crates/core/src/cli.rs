//! Command-line entry points.

pub fn run() -> i32 {
    0
}
