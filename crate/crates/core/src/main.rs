fn main() {
    std::process::exit(derender::cli::run(std::env::args_os()));
}
