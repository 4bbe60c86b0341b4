fn main() {
    std::process::exit(trdecomp::cli::main_with_args(std::env::args_os()));
}
