fn main() {
    std::process::exit(ptequil::cli::run(std::env::args_os()));
}
