fn main() {
    std::process::exit(mhairl::cli::main_with(std::env::args_os()));
}
