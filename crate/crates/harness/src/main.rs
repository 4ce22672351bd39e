fn main() {
    std::process::exit(jacspec_harness::cli::main_with_args(std::env::args_os()));
}
