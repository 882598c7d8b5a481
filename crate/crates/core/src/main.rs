fn main() {
    std::process::exit(sigsurr::cli::main_with(std::env::args_os()));
}
