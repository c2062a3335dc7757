fn main() {
    std::process::exit(monotrans::cli::run(std::env::args_os()));
}
