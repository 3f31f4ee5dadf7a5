fn main() {
    std::process::exit(signal_entry::cli::run(std::env::args_os()));
}
