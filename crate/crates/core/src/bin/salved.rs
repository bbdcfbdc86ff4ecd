fn main() {
    std::process::exit(salved::cli::run(std::env::args_os()));
}
