fn main() {
    println!("blindfx");
}
