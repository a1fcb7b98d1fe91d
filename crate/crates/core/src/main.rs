use std::io::Write;

fn main() {
    let argv: Vec<String> = std::env::args().collect();
    let env = std::env::vars().collect();
    let out = ledgerci::cli::run_cli(&argv, &env);
    let _ = std::io::stdout().write_all(out.stdout.as_bytes());
    let _ = std::io::stderr().write_all(out.stderr.as_bytes());
    std::process::exit(out.code);
}
