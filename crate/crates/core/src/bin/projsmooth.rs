fn main() {
    std::process::exit(projsmooth::cli::main_with_args(std::env::args_os()));
}
