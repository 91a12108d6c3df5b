fn main() {
    let code = cct_screen::cli::run(std::env::args_os());
    std::process::exit(code);
}
