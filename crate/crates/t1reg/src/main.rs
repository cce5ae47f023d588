fn main() {
    std::process::exit(t1reg::cli::main_with_args(std::env::args_os()));
}
