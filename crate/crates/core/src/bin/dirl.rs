fn main() {
    std::process::exit(dirl::cli::main_with(std::env::args_os()));
}
