fn main() {
    let args: Vec<String> = std::env::args().collect();
    std::process::exit(mcnet_cli::run(&args));
}
