#include <cstdio>

int main() {
  std::puts("rvafm: command-line interface under construction");
  return 1;
}
