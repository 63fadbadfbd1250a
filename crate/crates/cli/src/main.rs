fn main() {
    std::process::exit(permalign_cli::main_with(std::env::args_os()));
}
