fn main() {
    std::process::exit(tabflow::cli::main_with_exit_code());
}
