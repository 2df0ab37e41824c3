fn main() {
    std::process::exit(t2l_cli::run(std::env::args_os()));
}
