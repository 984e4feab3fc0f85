from icsmarginal.cli import main

main()
