from .mop_kernel import main


main()
