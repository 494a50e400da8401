fn main() {
    std::process::exit(wflow::harness::cli::cli_main(std::env::args_os()));
}
