//! Runs a bundled mechanism as an external command: one framed request on
//! stdin, one framed reply on stdout.
//!
//! usage: structoid-mech gallery|translator

use std::io::{stdin, stdout, Write};
use std::process::ExitCode;

use structoid_core::mechanisms::{builtin, builtin_names};
use structoid_core::wire::serve_one;

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mechanism = match args.as_slice() {
        [name] => builtin(name),
        _ => None,
    };
    let Some(mechanism) = mechanism else {
        eprintln!("usage: structoid-mech {}", builtin_names().join("|"));
        return ExitCode::from(2);
    };
    let mut output = stdout().lock();
    match serve_one(mechanism.as_ref(), &mut stdin().lock(), &mut output).and_then(|_| Ok(output.flush()?)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("structoid-mech: {e}");
            ExitCode::from(1)
        }
    }
}
