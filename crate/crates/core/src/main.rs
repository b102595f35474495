fn main() {
    let argv: Vec<String> = std::env::args().collect();
    std::process::exit(prefshift::cli::run_command(&argv));
}
