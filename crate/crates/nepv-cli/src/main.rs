fn main() {
    std::process::exit(nepv::run(std::env::args_os()));
}
