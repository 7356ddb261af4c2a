fn main() {
    std::process::exit(copss::cli::cli_main(std::env::args_os()));
}
