fn main() {
    std::process::exit(toolbc::cli::run(std::env::args_os()));
}
