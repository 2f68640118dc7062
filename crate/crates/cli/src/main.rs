fn main() {
    std::process::exit(lindbladiff_cli::main_with(std::env::args_os()));
}
