fn main() {
    std::process::exit(dpi_cli::run(std::env::args_os()));
}
