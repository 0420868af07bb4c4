use std::io::{self, IsTerminal};

use miniair::cli::{run_cli, Invocation};

fn main() {
    let inv = Invocation {
        args: std::env::args().collect(),
        env: std::env::vars().collect(),
        interactive: io::stdin().is_terminal(),
    };
    let code = run_cli(
        &inv,
        &mut io::stdin().lock(),
        &mut io::stdout().lock(),
        &mut io::stderr().lock(),
    );
    std::process::exit(code);
}
