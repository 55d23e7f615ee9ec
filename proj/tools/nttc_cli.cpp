// Command-line front end; commands are filled in alongside the library.
#include <cstdio>

int main() {
  std::puts("nttc: commands not wired yet");
  return 0;
}
