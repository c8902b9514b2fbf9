fn main() {
    std::process::exit(navtrans::cli::main_entry());
}
