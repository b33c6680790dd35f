#include "commands.hpp"

#ifdef __GLIBC__
#include <malloc.h>
#endif

int main(int argc, char** argv)
{
#ifdef __GLIBC__
    // Training allocates and frees multi-megabyte activations every step; keeping them in
    // the heap instead of returning them to the OS removes most of the system time.
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
    return mapn::cli::main(argc, argv);
}
