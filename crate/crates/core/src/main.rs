fn main() {
    std::process::exit(fracstep::harness::cli::main_with_args(std::env::args_os()));
}
