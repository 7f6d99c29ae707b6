fn main() {
    let code = hermchain::cli::run_from(std::env::args_os(), &mut std::io::stdout().lock());
    std::process::exit(code);
}
