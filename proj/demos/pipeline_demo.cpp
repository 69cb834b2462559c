#include <cstdio>
#include "mrf/mrf.hpp"
int main() { std::puts("demo placeholder"); return 0; }
