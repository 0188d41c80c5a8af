fn main() {
    std::process::exit(dsgrl::cli::main_with(std::env::args_os()));
}
