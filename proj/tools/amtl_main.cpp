#include <cstdio>

int main() {
  std::puts("amtl: not wired up yet");
  return 1;
}
