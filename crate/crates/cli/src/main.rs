fn main() {
    std::process::exit(drgrad_cli::cli_main(std::env::args_os()));
}
