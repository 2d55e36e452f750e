fn main() {
    std::process::exit(desigen::cli::dispatch(std::env::args_os()));
}
