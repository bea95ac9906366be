fn main() {
    std::process::exit(ssbr_prealign::cli::main_with_args(std::env::args_os()));
}
