fn main() {
    std::process::exit(transval::cli::run_cli(std::env::args_os()));
}
