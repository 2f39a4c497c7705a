fn main() {
    std::process::exit(ivr::cli::main_with_args(std::env::args_os()));
}
