fn main() {
    println!("snowsim");
}
