fn main() {
    std::process::exit(nullctl::cli::main_entry());
}
